//! leakmeter command line: batch evaluation of residual speaker-identity
//! leakage over paired original/anonymized embedding files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use leakmeter::corpus::{validate_corpus, Condition, DurationClass, EmbeddingMatrix};
use leakmeter::ingest::{read_embeddings, read_manifest, write_embeddings, write_manifest};
use leakmeter::report::{
    emit_report, read_report, run_eval, EmbeddingSpec, EvalConfig, MetricToggles, ReportFormat,
};
use leakmeter::sim::{preset, simulate, write_ground_truth, Preset, SimConfig};
use leakmeter::trials::{
    gen_cross_profile, gen_set1, gen_set2, NonTargetCap, Scenario, TrialGenOptions,
    write_trial_sets,
};
use leakmeter::verify::{eer, read_scores, score_trials, write_scores, EerReport};
use leakmeter::Error;

#[derive(Parser)]
#[command(
    name = "leakmeter",
    version,
    about = "Residual identity-leakage metrics for speaker de-identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-check a manifest against embedding files.
    Validate(ValidateArgs),
    /// Generate a synthetic corpus with known leakage.
    Simulate(SimulateArgs),
    /// Generate trial lists for one or more scenarios.
    Trials(TrialsArgs),
    /// Score trials by cosine similarity, or compute EER from a score file.
    Score(ScoreArgs),
    /// Run the full evaluation and write a report.
    Eval(EvalArgs),
    /// Re-emit an existing report JSON in another format.
    Report(ReportArgs),
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Embedding file as <model>:<condition>[:<profile>]=<path>; repeatable.
    #[arg(long = "emb", value_name = "SPEC")]
    embeddings: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset name: paper_shape | tiny | decoupling_a | decoupling_b.
    #[arg(long)]
    preset: Option<String>,
    /// JSON file with a full simulator config (overrides --preset fields).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for manifest, embeddings and ground truth.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrialsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Scenario to generate; repeatable. Default: all three.
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    /// Selected profiles, comma separated (default: two smallest present).
    #[arg(long, value_delimiter = ',')]
    profiles: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap non-targets at RATIO x targets (seeded sampling). Omit for
    /// exhaustive pools.
    #[arg(long, value_name = "RATIO")]
    nontarget_ratio: Option<f64>,
    /// Include cross-speaker non-targets in the cross-profile scenario.
    #[arg(long)]
    include_cross_speaker: bool,
    /// Restrict to one duration class: s10 | s30 | s60.
    #[arg(long)]
    duration: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Trials CSV to score (requires --emb).
    #[arg(long)]
    trials: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Embedding file as <model>:<condition>[:<profile>]=<path>; repeatable.
    #[arg(long = "emb", value_name = "SPEC")]
    embeddings: Vec<String>,
    /// Existing score CSV to import instead of computing.
    #[arg(long)]
    import: Option<PathBuf>,
    /// Where to write the score CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an EER report JSON here.
    #[arg(long)]
    eer: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON config file mirroring the evaluation fields; flags override.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Embedding file as <model>:<condition>[:<profile>]=<path>; repeatable.
    #[arg(long = "emb", value_name = "SPEC")]
    embeddings: Vec<String>,
    /// Scenario to run; repeatable. Default: all three.
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    /// Selected profiles, comma separated.
    #[arg(long, value_delimiter = ',')]
    profiles: Vec<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "RATIO")]
    nontarget_ratio: Option<f64>,
    #[arg(long)]
    include_cross_speaker: bool,
    #[arg(long)]
    duration: Option<String>,
    /// Worker threads for cell execution (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Report format: json | csv_tables | plot_csv. Repeatable.
    #[arg(long = "format")]
    formats: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Existing report.json.
    #[arg(long)]
    report: PathBuf,
    /// Target format: json | csv_tables | plot_csv.
    #[arg(long)]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_emb_spec(raw: &str) -> Result<EmbeddingSpec, Error> {
    let (head, path) = raw
        .split_once('=')
        .ok_or_else(|| Error::ConfigInvalid(format!("--emb {raw:?}: expected <spec>=<path>")))?;
    let parts: Vec<&str> = head.split(':').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(Error::ConfigInvalid(format!(
            "--emb {raw:?}: expected <model>:<condition>[:<profile>]=<path>"
        )));
    }
    let condition = match parts[1] {
        "orig" => Condition::Orig,
        "deid" => Condition::Deid,
        other => {
            return Err(Error::ConfigInvalid(format!(
                "--emb {raw:?}: unknown condition {other:?}"
            )))
        }
    };
    let profile = match parts.get(2) {
        Some(p) => Some(p.parse::<u32>().map_err(|_| {
            Error::ConfigInvalid(format!("--emb {raw:?}: profile must be an integer"))
        })?),
        None => None,
    };
    Ok(EmbeddingSpec {
        model: parts[0].to_string(),
        condition,
        profile,
        path: path.to_string(),
    })
}

fn parse_duration(s: &str) -> Result<DurationClass, Error> {
    match s {
        "s10" => Ok(DurationClass::S10),
        "s30" => Ok(DurationClass::S30),
        "s60" => Ok(DurationClass::S60),
        other => Err(Error::ConfigInvalid(format!(
            "unknown duration class {other:?}"
        ))),
    }
}

fn load_embeddings(specs: &[String]) -> Result<Vec<(EmbeddingSpec, EmbeddingMatrix)>, Error> {
    let mut out = Vec::new();
    for raw in specs {
        let spec = parse_emb_spec(raw)?;
        let emb = read_embeddings(&spec.path)?;
        out.push((spec, emb));
    }
    Ok(out)
}

fn cmd_validate(args: &ValidateArgs) -> Result<bool, Error> {
    let manifest = read_manifest(&args.manifest)?;
    if args.embeddings.is_empty() {
        return Err(Error::ConfigInvalid("validate needs at least one --emb".into()));
    }
    let loaded = load_embeddings(&args.embeddings)?;
    let mut by_model: std::collections::BTreeMap<String, Vec<EmbeddingMatrix>> =
        std::collections::BTreeMap::new();
    for (spec, emb) in loaded {
        by_model.entry(spec.model).or_default().push(emb);
    }
    let mut all_ok = true;
    for (model, parts) in by_model {
        let refs: Vec<&EmbeddingMatrix> = parts.iter().collect();
        let merged = EmbeddingMatrix::merge(model.clone(), &refs)?;
        let report = validate_corpus(&manifest, &merged);
        println!(
            "model {model}: ok={} missing_embeddings={} unknown_segments={} inconsistencies={}",
            report.ok,
            report.missing_embeddings.len(),
            report.unknown_segments.len(),
            report.inconsistencies.len()
        );
        for id in report.missing_embeddings.iter().take(10) {
            println!("  missing embedding: {id}");
        }
        for id in report.unknown_segments.iter().take(10) {
            println!("  unknown segment: {id}");
        }
        all_ok &= report.ok;
    }
    let gaps = manifest.coverage_gaps();
    if !gaps.is_empty() {
        eprintln!(
            "warning: {} de-identified speakers have no original speech",
            gaps.len()
        );
    }
    Ok(all_ok)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let mut cfg: SimConfig = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            serde_json::from_str(&text).map_err(|e| Error::ParseFailure(e.to_string()))?
        }
        (None, Some(name)) => preset(Preset::parse(name)?),
        (None, None) => preset(Preset::Tiny),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = simulate(&cfg)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    write_manifest(&out.manifest, args.out.join("manifest.jsonl"))?;
    write_embeddings(&out.orig, args.out.join("orig.xvec"))?;
    for (p, emb) in &out.deid {
        write_embeddings(emb, args.out.join(format!("deid_p{p}.xvec")))?;
    }
    write_ground_truth(&out.ground_truth, args.out.join("ground_truth.json"))?;
    log::info!(
        "simulated {} speakers, {} segments into {}",
        out.manifest.speaker_count(),
        out.manifest.len(),
        args.out.display()
    );
    println!(
        "wrote manifest ({} segments), orig.xvec, {} deid file(s), ground_truth.json",
        out.manifest.len(),
        out.deid.len()
    );
    Ok(())
}

fn resolve_profiles_flag(profiles: &[u32], manifest_path: &Path) -> Result<Vec<u32>, Error> {
    if !profiles.is_empty() {
        return Ok(profiles.to_vec());
    }
    let manifest = read_manifest(manifest_path)?;
    let present = manifest.profile_ids();
    Ok(present.into_iter().take(2).collect())
}

fn cmd_trials(args: &TrialsArgs) -> Result<(), Error> {
    let manifest = read_manifest(&args.manifest)?;
    let profiles = resolve_profiles_flag(&args.profiles, &args.manifest)?;
    let scenarios = if args.scenarios.is_empty() {
        vec![Scenario::Set1, Scenario::Set2, Scenario::Xprof]
    } else {
        args.scenarios
            .iter()
            .map(|s| Scenario::parse(s))
            .collect::<Result<Vec<_>, _>>()?
    };
    let opts = TrialGenOptions {
        seed: args.seed,
        cap: match args.nontarget_ratio {
            Some(r) => NonTargetCap::Ratio(r),
            None => NonTargetCap::Exhaustive,
        },
        duration: args.duration.as_deref().map(parse_duration).transpose()?,
    };

    let mut lists = Vec::new();
    for sc in scenarios {
        match sc {
            Scenario::Set1 => {
                for &p in &profiles {
                    lists.push(gen_set1(&manifest, p, &opts)?);
                }
            }
            Scenario::Set2 => {
                for &p in &profiles {
                    lists.push(gen_set2(&manifest, p, &opts)?);
                }
            }
            Scenario::Xprof => {
                for (i, &p1) in profiles.iter().enumerate() {
                    for &p2 in profiles.iter().skip(i + 1) {
                        lists.push(gen_cross_profile(
                            &manifest,
                            p1,
                            p2,
                            args.include_cross_speaker,
                            &opts,
                        )?);
                    }
                }
            }
        }
    }
    write_trial_sets(&lists, &args.out)?;
    for l in &lists {
        println!(
            "{} profiles={:?}: {} target, {} nontarget",
            l.scenario.as_str(),
            l.profiles,
            l.n_target,
            l.n_nontarget
        );
    }
    Ok(())
}

fn cmd_score(args: &ScoreArgs) -> Result<(), Error> {
    let scores = if let Some(import) = &args.import {
        read_scores(import)?
    } else {
        let trials_path = args.trials.as_ref().ok_or_else(|| {
            Error::ConfigInvalid("score needs --trials (or --import)".into())
        })?;
        if args.embeddings.is_empty() {
            return Err(Error::ConfigInvalid("score needs at least one --emb".into()));
        }
        let loaded = load_embeddings(&args.embeddings)?;
        let parts: Vec<&EmbeddingMatrix> = loaded.iter().map(|(_, m)| m).collect();
        let merged = EmbeddingMatrix::merge("merged", &parts)?;
        let lists = leakmeter::trials::read_trials(trials_path)?;
        let mut all = Vec::new();
        for list in &lists {
            let s = score_trials(list, &merged)?;
            all.extend(s.scores);
        }
        leakmeter::verify::ScoreSet::new(all)
    };

    if let Some(out) = &args.out {
        write_scores(&scores, out)?;
        println!(
            "wrote {} scores ({} target, {} nontarget) to {}",
            scores.scores.len(),
            scores.n_target,
            scores.n_nontarget,
            out.display()
        );
    }
    if let Some(eer_out) = &args.eer {
        let result = eer(&scores)?;
        let report = EerReport::from_result(&result, &scores);
        let body = serde_json::to_vec_pretty(&report)
            .map_err(|e| Error::ParseFailure(e.to_string()))?;
        std::fs::write(eer_out, body)
            .map_err(|e| Error::io(eer_out.display().to_string(), e))?;
        println!("eer = {:.4} at threshold {:.6}", result.eer, result.threshold);
    }
    if args.out.is_none() && args.eer.is_none() {
        return Err(Error::ConfigInvalid(
            "score needs --out and/or --eer".into(),
        ));
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let mut cfg: EvalConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            serde_json::from_str(&text).map_err(|e| Error::ParseFailure(e.to_string()))?
        }
        None => EvalConfig {
            manifest: String::new(),
            embeddings: Vec::new(),
            scenarios: Vec::new(),
            profiles: Vec::new(),
            seed: 0,
            nontarget_ratio: None,
            include_cross_speaker: false,
            duration: None,
            metrics: MetricToggles::default(),
        },
    };
    // Flags override file values.
    if let Some(m) = &args.manifest {
        cfg.manifest = m.display().to_string();
    }
    if !args.embeddings.is_empty() {
        cfg.embeddings = args
            .embeddings
            .iter()
            .map(|s| parse_emb_spec(s))
            .collect::<Result<_, _>>()?;
    }
    if !args.scenarios.is_empty() {
        cfg.scenarios = args
            .scenarios
            .iter()
            .map(|s| Scenario::parse(s))
            .collect::<Result<_, _>>()?;
    }
    if !args.profiles.is_empty() {
        cfg.profiles = args.profiles.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(r) = args.nontarget_ratio {
        cfg.nontarget_ratio = Some(r);
    }
    if args.include_cross_speaker {
        cfg.include_cross_speaker = true;
    }
    if let Some(d) = &args.duration {
        cfg.duration = Some(parse_duration(d)?);
    }
    if cfg.manifest.is_empty() {
        return Err(Error::ConfigInvalid("eval needs --manifest or --config".into()));
    }
    if cfg.embeddings.is_empty() {
        return Err(Error::ConfigInvalid("eval needs at least one --emb".into()));
    }

    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::ConfigInvalid(format!("--jobs: {e}")))?;
    }

    let report = run_eval(&cfg)?;
    let formats = if args.formats.is_empty() {
        vec![ReportFormat::Json]
    } else {
        args.formats
            .iter()
            .map(|f| ReportFormat::parse(f))
            .collect::<Result<Vec<_>, _>>()?
    };
    for format in formats {
        let files = emit_report(&report, format, &args.out)?;
        for f in files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), Error> {
    let report = read_report(&args.report)?;
    let format = ReportFormat::parse(&args.format)?;
    let files = emit_report(&report, format, &args.out)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LEAKMETER_LOG")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(args) => cmd_validate(args).map(|ok| {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }),
        Command::Simulate(args) => cmd_simulate(args).map(|_| ExitCode::SUCCESS),
        Command::Trials(args) => cmd_trials(args).map(|_| ExitCode::SUCCESS),
        Command::Score(args) => cmd_score(args).map(|_| ExitCode::SUCCESS),
        Command::Eval(args) => cmd_eval(args).map(|_| ExitCode::SUCCESS),
        Command::Report(args) => cmd_report(args).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
