//! Evaluation orchestration: runs the requested scenario/metric cells over
//! a corpus and emits machine-readable reports.
//!
//! A report is reproducible bit-for-bit from (inputs, config): cells are
//! assembled in a fixed order, every float is serialized with round-trip
//! precision, and the provenance block carries the seed and a hash of the
//! canonical config JSON. Failures are recorded per cell and never abort
//! sibling cells.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{validate_corpus, Condition, CorpusManifest, DurationClass, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::ident::{build_gallery, cmc_from_ranks, rank_probes, CmcCurve, CmcReport};
use crate::ingest::{read_embeddings, read_manifest};
use crate::subspace::{pair_embeddings, subspace_report, Ridge, SubspaceReport};
use crate::trials::{
    gen_cross_profile, gen_set1, gen_set2, NonTargetCap, Scenario, TrialGenOptions, TrialList,
};
use crate::verify::{eer, score_trials};

/// One embedding file: which model produced it and what it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub model: String,
    pub condition: Condition,
    #[serde(default)]
    pub profile: Option<u32>,
    pub path: String,
}

/// Which metric families to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricToggles {
    pub verification: bool,
    pub identification: bool,
    pub subspace: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        MetricToggles {
            verification: true,
            identification: true,
            subspace: true,
        }
    }
}

/// Evaluation configuration. The JSON config file mirrors these fields;
/// command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub manifest: String,
    pub embeddings: Vec<EmbeddingSpec>,
    /// Scenarios to run; empty means all three.
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
    /// Selected profiles; empty means the two smallest in the manifest.
    #[serde(default)]
    pub profiles: Vec<u32>,
    #[serde(default)]
    pub seed: u64,
    /// Cap non-targets at `ratio * n_target`; absent means exhaustive.
    #[serde(default)]
    pub nontarget_ratio: Option<f64>,
    #[serde(default)]
    pub include_cross_speaker: bool,
    #[serde(default)]
    pub duration: Option<DurationClass>,
    #[serde(default)]
    pub metrics: MetricToggles,
}

impl EvalConfig {
    /// Hash of the canonical config JSON, for report provenance.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// A cell value or the error that produced no value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellValue<T> {
    Ok { value: T },
    Error { message: String },
}

impl<T> From<Result<T>> for CellValue<T> {
    fn from(r: Result<T>) -> Self {
        match r {
            Ok(value) => CellValue::Ok { value },
            Err(e) => CellValue::Error {
                message: e.to_string(),
            },
        }
    }
}

/// Verification summary for one (scenario, profiles, model) cell. The ROC
/// trace is decimated to at most 1,024 evenly strided points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerSummary {
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub roc: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerCell {
    pub scenario: Scenario,
    pub profiles: Vec<u32>,
    pub model: String,
    #[serde(flatten)]
    pub outcome: CellValue<EerSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentCell {
    pub model: String,
    /// `None` marks the curve averaged over the selected profiles.
    pub profile: Option<u32>,
    #[serde(flatten)]
    pub outcome: CellValue<CmcReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceCell {
    pub model: String,
    pub profile: u32,
    #[serde(flatten)]
    pub outcome: CellValue<SubspaceReport>,
}

/// The full evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub profiles: Vec<u32>,
    pub eer_cells: Vec<EerCell>,
    pub identification: Vec<IdentCell>,
    pub subspace: Vec<SubspaceCell>,
}

fn decimate_roc(points: &[(f64, f64, f64)], cap: usize) -> Vec<(f64, f64, f64)> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(cap);
    let mut out: Vec<(f64, f64, f64)> = points.iter().step_by(stride).copied().collect();
    if let Some(&last) = points.last() {
        if out.last() != Some(&last) {
            out.push(last);
        }
    }
    out
}

struct LoadedModel {
    model: String,
    emb: EmbeddingMatrix,
}

fn load_inputs(cfg: &EvalConfig) -> Result<(CorpusManifest, Vec<LoadedModel>)> {
    let manifest = read_manifest(&cfg.manifest)
        .map_err(|e| Error::ConfigInvalid(format!("manifest {}: {e}", cfg.manifest)))?;

    let mut by_model: BTreeMap<String, Vec<&EmbeddingSpec>> = BTreeMap::new();
    for spec in &cfg.embeddings {
        by_model.entry(spec.model.clone()).or_default().push(spec);
    }
    if by_model.is_empty() {
        return Err(Error::ConfigInvalid("no embeddings configured".into()));
    }

    let mut models = Vec::new();
    for (model, specs) in by_model {
        let mut parts = Vec::new();
        for spec in specs {
            let m = read_embeddings(&spec.path)
                .map_err(|e| Error::ConfigInvalid(format!("embedding {}: {e}", spec.path)))?;
            parts.push(m);
        }
        let refs: Vec<&EmbeddingMatrix> = parts.iter().collect();
        let merged = EmbeddingMatrix::merge(model.clone(), &refs)?;
        let report = validate_corpus(&manifest, &merged);
        if !report.ok {
            return Err(Error::CorpusInvalid(format!(
                "model {model}: {} segments missing embeddings, {} unknown embedding ids, {} inconsistencies",
                report.missing_embeddings.len(),
                report.unknown_segments.len(),
                report.inconsistencies.len()
            )));
        }
        models.push(LoadedModel { model, emb: merged });
    }
    Ok((manifest, models))
}

fn resolve_profiles(cfg: &EvalConfig, manifest: &CorpusManifest) -> Result<Vec<u32>> {
    let present = manifest.profile_ids();
    if cfg.profiles.is_empty() {
        let take: Vec<u32> = present.iter().copied().take(2).collect();
        if take.is_empty() {
            return Err(Error::ConfigInvalid(
                "manifest has no de-identified profiles".into(),
            ));
        }
        return Ok(take);
    }
    for p in &cfg.profiles {
        if !present.contains(p) {
            return Err(Error::ConfigInvalid(format!(
                "profile {p} not present in manifest (available: {present:?})"
            )));
        }
    }
    Ok(cfg.profiles.clone())
}

/// Runs every requested cell of the evaluation.
pub fn run_eval(cfg: &EvalConfig) -> Result<EvalReport> {
    let (manifest, models) = load_inputs(cfg)?;
    let profiles = resolve_profiles(cfg, &manifest)?;
    let scenarios = if cfg.scenarios.is_empty() {
        vec![Scenario::Set1, Scenario::Set2, Scenario::Xprof]
    } else {
        cfg.scenarios.clone()
    };
    let gen_opts = TrialGenOptions {
        seed: cfg.seed,
        cap: match cfg.nontarget_ratio {
            Some(r) => NonTargetCap::Ratio(r),
            None => NonTargetCap::Exhaustive,
        },
        duration: cfg.duration,
    };

    // Trial lists are embedding-independent: generate once per scenario
    // cell and score under every model.
    let mut trial_jobs: Vec<(Scenario, Vec<u32>)> = Vec::new();
    for &sc in &scenarios {
        match sc {
            Scenario::Set1 | Scenario::Set2 => {
                for &p in &profiles {
                    trial_jobs.push((sc, vec![p]));
                }
            }
            Scenario::Xprof => {
                for (i, &p1) in profiles.iter().enumerate() {
                    for &p2 in profiles.iter().skip(i + 1) {
                        trial_jobs.push((sc, vec![p1, p2]));
                    }
                }
            }
        }
    }

    let mut eer_cells = Vec::new();
    if cfg.metrics.verification {
        let lists: Vec<(Scenario, Vec<u32>, Result<TrialList>)> = trial_jobs
            .par_iter()
            .map(|(sc, profs)| {
                let list = match sc {
                    Scenario::Set1 => gen_set1(&manifest, profs[0], &gen_opts),
                    Scenario::Set2 => gen_set2(&manifest, profs[0], &gen_opts),
                    Scenario::Xprof => gen_cross_profile(
                        &manifest,
                        profs[0],
                        profs[1],
                        cfg.include_cross_speaker,
                        &gen_opts,
                    ),
                };
                (*sc, profs.clone(), list)
            })
            .collect();

        let mut cell_inputs = Vec::new();
        for (sc, profs, list) in &lists {
            for model in &models {
                cell_inputs.push((*sc, profs.clone(), model, list));
            }
        }
        eer_cells = cell_inputs
            .par_iter()
            .map(|(sc, profs, model, list)| {
                let outcome: CellValue<EerSummary> = match list {
                    Ok(list) => score_trials(list, &model.emb)
                        .and_then(|scores| {
                            let r = eer(&scores)?;
                            Ok(EerSummary {
                                eer: r.eer,
                                threshold: r.threshold,
                                n_target: scores.n_target,
                                n_nontarget: scores.n_nontarget,
                                roc: decimate_roc(
                                    &r.roc
                                        .iter()
                                        .map(|p| (p.far, p.frr, p.threshold))
                                        .collect::<Vec<_>>(),
                                    1024,
                                ),
                            })
                        })
                        .into(),
                    Err(e) => CellValue::Error {
                        message: e.to_string(),
                    },
                };
                EerCell {
                    scenario: *sc,
                    profiles: profs.clone(),
                    model: model.model.clone(),
                    outcome,
                }
            })
            .collect();
    }

    let mut identification = Vec::new();
    if cfg.metrics.identification {
        let manifest_ref = &manifest;
        let ident_results: Vec<(String, u32, Result<(CmcReport, CmcCurve)>)> = models
            .par_iter()
            .flat_map(|model| {
                profiles.par_iter().map(move |&p| {
                    let r = build_gallery(manifest_ref, &model.emb, p).and_then(|(gallery, probes)| {
                        let ranks = rank_probes(&gallery, &probes)?;
                        let report = CmcReport::from_ranks(&ranks, gallery.size())?;
                        let curve = cmc_from_ranks(&ranks, gallery.size())?;
                        Ok((report, curve))
                    });
                    (model.model.clone(), p, r)
                })
            })
            .collect();

        let mut curves_by_model: BTreeMap<String, Vec<CmcCurve>> = BTreeMap::new();
        for (model, p, result) in ident_results {
            match result {
                Ok((report, curve)) => {
                    curves_by_model.entry(model.clone()).or_default().push(curve);
                    identification.push(IdentCell {
                        model,
                        profile: Some(p),
                        outcome: CellValue::Ok { value: report },
                    });
                }
                Err(e) => identification.push(IdentCell {
                    model,
                    profile: Some(p),
                    outcome: CellValue::Error {
                        message: e.to_string(),
                    },
                }),
            }
        }
        // Averaged-over-profiles curve per model, when more than one
        // profile produced a curve.
        for (model, curves) in curves_by_model {
            if curves.len() < 2 {
                continue;
            }
            let outcome = CmcCurve::average(&curves)
                .and_then(|avg| {
                    let mut hit_at = BTreeMap::new();
                    for &k in crate::ident::REPORT_RANKS.iter() {
                        if let Ok(h) = avg.hit_rate(k) {
                            hit_at.insert(k, h);
                        }
                    }
                    Ok(CmcReport {
                        gallery_size: avg.gallery_size,
                        n_probes: avg.n_probes,
                        auc_cmc: avg.auc(),
                        mean_rank: 1.0 + (1.0 - avg.auc()) * avg.gallery_size as f64,
                        hits: avg.hits,
                        hit_at,
                    })
                })
                .into();
            identification.push(IdentCell {
                model,
                profile: None,
                outcome,
            });
        }
        identification.sort_by(|a, b| {
            a.model
                .cmp(&b.model)
                .then_with(|| a.profile.cmp(&b.profile))
        });
    }

    let mut subspace = Vec::new();
    if cfg.metrics.subspace {
        let manifest_ref = &manifest;
        subspace = models
            .par_iter()
            .flat_map(|model| {
                profiles.par_iter().map(move |&p| {
                    let outcome = pair_embeddings(manifest_ref, &model.emb, &model.emb, p)
                        .and_then(|paired| subspace_report(&paired, Ridge::Default))
                        .into();
                    SubspaceCell {
                        model: model.model.clone(),
                        profile: p,
                        outcome,
                    }
                })
            })
            .collect();
        subspace.sort_by(|a, b| a.model.cmp(&b.model).then(a.profile.cmp(&b.profile)));
    }

    Ok(EvalReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        profiles,
        eer_cells,
        identification,
        subspace,
    })
}

/// Output format of `emit_report`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    CsvTables,
    PlotCsv,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv_tables" => Ok(ReportFormat::CsvTables),
            "plot_csv" => Ok(ReportFormat::PlotCsv),
            other => Err(Error::ParseFailure(format!("unknown format {other:?}"))),
        }
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::io(path.display().to_string(), e)
    })?))
}

/// Serializes the report in the chosen format; returns the files written.
pub fn emit_report(
    report: &EvalReport,
    format: ReportFormat,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();

    match format {
        ReportFormat::Json => {
            let path = out_dir.join("report.json");
            let mut w = create(&path)?;
            let body =
                serde_json::to_vec_pretty(report).map_err(|e| Error::ParseFailure(e.to_string()))?;
            w.write_all(&body)
                .and_then(|_| w.write_all(b"\n"))
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            written.push(path);
        }
        ReportFormat::CsvTables => {
            let path = out_dir.join("eer.csv");
            let mut w = create(&path)?;
            writeln!(w, "scenario,profiles,model,eer,threshold,n_target,n_nontarget,error")
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            for cell in &report.eer_cells {
                let profs = cell
                    .profiles
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join("+");
                match &cell.outcome {
                    CellValue::Ok { value } => writeln!(
                        w,
                        "{},{},{},{},{},{},{},",
                        cell.scenario.as_str(),
                        profs,
                        cell.model,
                        value.eer,
                        value.threshold,
                        value.n_target,
                        value.n_nontarget
                    ),
                    CellValue::Error { message } => writeln!(
                        w,
                        "{},{},{},,,,,\"{}\"",
                        cell.scenario.as_str(),
                        profs,
                        cell.model,
                        message.replace('"', "'")
                    ),
                }
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
            written.push(path);

            // CMC hit rates at the conventional ranks.
            let path = out_dir.join("cmc_hit_rate.csv");
            let mut w = create(&path)?;
            writeln!(w, "model,profile,G,n_probes,k1,k5,k10,k20,k50,error")
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            for cell in &report.identification {
                let prof = cell
                    .profile
                    .map(|p| p.to_string())
                    .unwrap_or_else(|| "avg".into());
                match &cell.outcome {
                    CellValue::Ok { value } => {
                        let at = |k: usize| {
                            value
                                .hit_at
                                .get(&k)
                                .map(|h| h.to_string())
                                .unwrap_or_default()
                        };
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{},{},{},",
                            cell.model,
                            prof,
                            value.gallery_size,
                            value.n_probes,
                            at(1),
                            at(5),
                            at(10),
                            at(20),
                            at(50)
                        )
                    }
                    CellValue::Error { message } => writeln!(
                        w,
                        "{},{},,,,,,,,\"{}\"",
                        cell.model,
                        prof,
                        message.replace('"', "'")
                    ),
                }
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
            written.push(path);

            // System-level identification summary.
            let path = out_dir.join("system_eval.csv");
            let mut w = create(&path)?;
            writeln!(w, "model,profile,auc_cmc,mean_rank,error")
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            for cell in &report.identification {
                let prof = cell
                    .profile
                    .map(|p| p.to_string())
                    .unwrap_or_else(|| "avg".into());
                match &cell.outcome {
                    CellValue::Ok { value } => writeln!(
                        w,
                        "{},{},{},{},",
                        cell.model, prof, value.auc_cmc, value.mean_rank
                    ),
                    CellValue::Error { message } => writeln!(
                        w,
                        "{},{},,,\"{}\"",
                        cell.model,
                        prof,
                        message.replace('"', "'")
                    ),
                }
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
            written.push(path);

            // Embedding-space similarity.
            let path = out_dir.join("subspace.csv");
            let mut w = create(&path)?;
            writeln!(w, "model,profile,n,d1,d2,cca_mean_top10,ridge,p_mse,p_cosine,error")
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            for cell in &report.subspace {
                match &cell.outcome {
                    CellValue::Ok { value } => writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{},",
                        cell.model,
                        cell.profile,
                        value.n,
                        value.d1,
                        value.d2,
                        value.cca_mean_top10,
                        value.ridge,
                        value.p_mse,
                        value.p_cosine
                    ),
                    CellValue::Error { message } => writeln!(
                        w,
                        "{},{},,,,,,,,\"{}\"",
                        cell.model,
                        cell.profile,
                        message.replace('"', "'")
                    ),
                }
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
            written.push(path);
        }
        ReportFormat::PlotCsv => {
            for cell in &report.identification {
                let CellValue::Ok { value } = &cell.outcome else {
                    continue;
                };
                let prof = cell
                    .profile
                    .map(|p| format!("p{p}"))
                    .unwrap_or_else(|| "avg".into());
                let path = out_dir.join(format!("cmc_{}_{}.csv", sanitize(&cell.model), prof));
                let mut w = create(&path)?;
                writeln!(w, "k,hit_rate").map_err(|e| Error::io(path.display().to_string(), e))?;
                for (i, h) in value.hits.iter().enumerate() {
                    writeln!(w, "{},{}", i + 1, h)
                        .map_err(|e| Error::io(path.display().to_string(), e))?;
                }
                w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
                written.push(path);
            }
            for cell in &report.eer_cells {
                let CellValue::Ok { value } = &cell.outcome else {
                    continue;
                };
                let profs = cell
                    .profiles
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join("-");
                let path = out_dir.join(format!(
                    "roc_{}_{}_p{}.csv",
                    cell.scenario.as_str(),
                    sanitize(&cell.model),
                    profs
                ));
                let mut w = create(&path)?;
                writeln!(w, "far,frr,threshold")
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                for (far, frr, thr) in &value.roc {
                    writeln!(w, "{far},{frr},{thr}")
                        .map_err(|e| Error::io(path.display().to_string(), e))?;
                }
                w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Reads a report back from its JSON form.
pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::ParseFailure(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{write_embeddings, write_manifest};
    use crate::sim::{preset, simulate, Preset};

    fn stage_sim(dir: &Path) -> EvalConfig {
        let out = simulate(&preset(Preset::Tiny)).unwrap();
        write_manifest(&out.manifest, dir.join("manifest.jsonl")).unwrap();
        write_embeddings(&out.orig, dir.join("orig.xvec")).unwrap();
        let mut embeddings = vec![EmbeddingSpec {
            model: "sim".into(),
            condition: Condition::Orig,
            profile: None,
            path: dir.join("orig.xvec").display().to_string(),
        }];
        for (p, m) in &out.deid {
            let path = dir.join(format!("deid_p{p}.xvec"));
            write_embeddings(m, &path).unwrap();
            embeddings.push(EmbeddingSpec {
                model: "sim".into(),
                condition: Condition::Deid,
                profile: Some(*p),
                path: path.display().to_string(),
            });
        }
        EvalConfig {
            manifest: dir.join("manifest.jsonl").display().to_string(),
            embeddings,
            scenarios: vec![],
            profiles: vec![],
            seed: 11,
            nontarget_ratio: None,
            include_cross_speaker: false,
            duration: None,
            metrics: MetricToggles::default(),
        }
    }

    #[test]
    fn tiny_eval_populates_all_cells() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stage_sim(dir.path());
        let report = run_eval(&cfg).unwrap();
        // 1 model x (set1 p1, set1 p2, set2 p1, set2 p2, xprof p1+p2)
        assert_eq!(report.eer_cells.len(), 5);
        assert!(report
            .eer_cells
            .iter()
            .all(|c| matches!(c.outcome, CellValue::Ok { .. })));
        // per-profile cells plus the averaged one
        assert_eq!(report.identification.len(), 3);
        assert_eq!(report.subspace.len(), 2);
        assert!(report
            .subspace
            .iter()
            .all(|c| matches!(c.outcome, CellValue::Ok { .. })));
    }

    #[test]
    fn unknown_profile_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = stage_sim(dir.path());
        cfg.profiles = vec![3];
        match run_eval(&cfg).unwrap_err() {
            Error::ConfigInvalid(msg) => assert!(msg.contains('3'), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = stage_sim(dir.path());
        cfg.manifest = dir.path().join("nope.jsonl").display().to_string();
        match run_eval(&cfg).unwrap_err() {
            Error::ConfigInvalid(msg) => assert!(msg.contains("nope.jsonl")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stage_sim(dir.path());
        let report = run_eval(&cfg).unwrap();
        let out = dir.path().join("out");
        let files = emit_report(&report, ReportFormat::Json, &out).unwrap();
        assert_eq!(files.len(), 1);
        let back = read_report(&files[0]).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn csv_tables_headers_match_report_ranks() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stage_sim(dir.path());
        let report = run_eval(&cfg).unwrap();
        let out = dir.path().join("tables");
        let files = emit_report(&report, ReportFormat::CsvTables, &out).unwrap();
        let cmc = files
            .iter()
            .find(|p| p.file_name().unwrap() == "cmc_hit_rate.csv")
            .unwrap();
        let text = std::fs::read_to_string(cmc).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "model,profile,G,n_probes,k1,k5,k10,k20,k50,error");
    }

    #[test]
    fn plot_csv_cmc_is_nondecreasing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stage_sim(dir.path());
        let report = run_eval(&cfg).unwrap();
        let out = dir.path().join("plots");
        let files = emit_report(&report, ReportFormat::PlotCsv, &out).unwrap();
        let cmc_files: Vec<_> = files
            .iter()
            .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("cmc_"))
            .collect();
        assert!(!cmc_files.is_empty());
        for f in cmc_files {
            let text = std::fs::read_to_string(f).unwrap();
            let mut last = -1.0f64;
            for line in text.lines().skip(1) {
                let rate: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
                assert!(rate >= last, "hit_rate decreased in {f:?}");
                last = rate;
            }
        }
    }

    #[test]
    fn identical_config_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stage_sim(dir.path());
        let r1 = run_eval(&cfg).unwrap();
        let r2 = run_eval(&cfg).unwrap();
        let b1 = serde_json::to_vec_pretty(&r1).unwrap();
        let b2 = serde_json::to_vec_pretty(&r2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn cell_isolation_on_partial_failure() {
        use crate::corpus::{build_manifest, SegmentRecord};
        // Profile 2 exists but has a single segment: set2 on it cannot
        // produce trials, while every other cell still computes.
        let dir = tempfile::tempdir().unwrap();
        let mut records = Vec::new();
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for s in 0..4 {
            for sess in 0..3 {
                let id = format!("s{s}o{sess}");
                records.push(SegmentRecord {
                    segment_id: id.clone(),
                    speaker_id: format!("spk{s}"),
                    session_id: format!("spk{s}-{sess}"),
                    condition: Condition::Orig,
                    profile_id: None,
                    duration_class: DurationClass::S10,
                });
                ids.push(id);
                let id = format!("s{s}d{sess}");
                records.push(SegmentRecord {
                    segment_id: id.clone(),
                    speaker_id: format!("spk{s}"),
                    session_id: format!("spk{s}-{sess}"),
                    condition: Condition::Deid,
                    profile_id: Some(1),
                    duration_class: DurationClass::S10,
                });
                ids.push(id);
            }
        }
        records.push(SegmentRecord {
            segment_id: "lonely-p2".into(),
            speaker_id: "spk0".into(),
            session_id: "spk0-0".into(),
            condition: Condition::Deid,
            profile_id: Some(2),
            duration_class: DurationClass::S10,
        });
        ids.push("lonely-p2".into());
        for (i, _) in ids.iter().enumerate() {
            values.extend([1.0 + i as f64, (i % 5) as f64, 1.0]);
        }
        let manifest = build_manifest(records).unwrap();
        write_manifest(&manifest, dir.path().join("manifest.jsonl")).unwrap();
        let emb = EmbeddingMatrix::new("m", 3, ids, values).unwrap();
        write_embeddings(&emb, dir.path().join("emb.xvec")).unwrap();

        let cfg = EvalConfig {
            manifest: dir.path().join("manifest.jsonl").display().to_string(),
            embeddings: vec![EmbeddingSpec {
                model: "m".into(),
                condition: Condition::Orig,
                profile: None,
                path: dir.path().join("emb.xvec").display().to_string(),
            }],
            scenarios: vec![],
            profiles: vec![1, 2],
            seed: 3,
            nontarget_ratio: None,
            include_cross_speaker: false,
            duration: None,
            metrics: MetricToggles::default(),
        };
        let report = run_eval(&cfg).unwrap();
        let set2_p2 = report
            .eer_cells
            .iter()
            .find(|c| c.scenario == Scenario::Set2 && c.profiles == vec![2])
            .unwrap();
        assert!(matches!(set2_p2.outcome, CellValue::Error { .. }));
        let set1_p1 = report
            .eer_cells
            .iter()
            .find(|c| c.scenario == Scenario::Set1 && c.profiles == vec![1])
            .unwrap();
        assert!(matches!(set1_p1.outcome, CellValue::Ok { .. }));
    }
}
