use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use footprint::corpus::{parse_archive, IngestOptions, Schema};
use footprint::evaluation::{comparison_markdown, ComparisonRow, Contender};
use footprint::pipeline::{artifacts, Pipeline, PipelineConfig, PipelineError, RunReport, Stage, StageReport};
use footprint::synthgen::{generate, verify_generation, GeneratorConfig, SynthError};

/// Classify the social footprint of influence-operation accounts.
#[derive(Debug, Parser)]
#[command(name = "footprint", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Pipeline configuration (TOML); for `synth`, the generator configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print reports as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the archive into the canonical corpus.
    Ingest,
    /// Seed labels from coded files, description rules and hashtag footprints.
    Label,
    /// Spread labels to unlabeled accounts by hashtag similarity.
    Propagate,
    /// Extract, screen and normalise behavioural features.
    Featurize,
    /// Train the random forest on a stratified holdout split.
    Train,
    /// Cross-validate the forest and sweep tree depth.
    Evaluate,
    /// Label every account with its seed, propagated or predicted category.
    Predict,
    /// Score agreement with external labelings and manual rechecks.
    Validate,
    /// Run every stage from scratch.
    Run,
    /// Compare the forest with baseline classifiers under the same CV.
    Compare {
        /// Restrict the table to these classifiers (repeatable).
        #[arg(long = "classifier", value_name = "NAME")]
        classifiers: Vec<String>,
    },
    /// Generate a synthetic archive with planted categories.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Accounts per category.
    #[arg(long)]
    accounts: Option<usize>,
    /// Probability that a hashtag is drawn from another category's pool.
    #[arg(long)]
    noise: Option<f64>,
    /// Fraction of accounts with hashed profiles, in every category.
    #[arg(long)]
    hashed_fraction: Option<f64>,
    /// Skip the statistical self-check of the generated archive.
    #[arg(long)]
    no_verify: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(p) = e.downcast_ref::<PipelineError>() {
        return p.exit_code() as u8;
    }
    match e.downcast_ref::<SynthError>() {
        Some(SynthError::InvalidConfig(_) | SynthError::Toml(_)) => 1,
        Some(SynthError::Corpus(_) | SynthError::Label(_)) => 2,
        _ => 3,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let stage = match &cli.command {
        Command::Synth(args) => return synth(g, args),
        Command::Run => return run(g),
        Command::Compare { classifiers } => return compare(g, classifiers),
        Command::Ingest => Stage::Ingest,
        Command::Label => Stage::Label,
        Command::Propagate => Stage::Propagate,
        Command::Featurize => Stage::Featurize,
        Command::Train => Stage::Train,
        Command::Evaluate => Stage::Evaluate,
        Command::Predict => Stage::Predict,
        Command::Validate => Stage::Validate,
    };
    let pipeline = pipeline(g, |_| Ok(()))?;
    let report = pipeline.run_stage(stage)?;
    print_stage(&report, pipeline.output_dir(), g.json)
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn pipeline(g: &Global, adjust: impl FnOnce(&mut PipelineConfig) -> Result<()>) -> Result<Pipeline> {
    let mut cfg = load_config(g)?;
    adjust(&mut cfg)?;
    Ok(Pipeline::new(cfg)?)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn print_stage(r: &StageReport, out: &Path, json: bool) -> Result<()> {
    if json {
        return print_json(r);
    }
    let name = r.stage.map_or("stage", Stage::name);
    let counts: Vec<String> = r.outputs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("{name}: {}", counts.join(" "));
    for w in &r.warnings {
        println!("  warning: {w}");
    }
    for a in &r.artifacts {
        println!("  wrote {}", out.join(a).display());
    }
    Ok(())
}

fn run(g: &Global) -> Result<()> {
    let pipeline = pipeline(g, |_| Ok(()))?;
    let outcome = pipeline.run()?;
    if g.json {
        return print_json(&outcome.report);
    }
    print_summary(&outcome.report);
    println!("report: {}", pipeline.artifact(artifacts::RUN_REPORT_MD).display());
    Ok(())
}

fn print_summary(r: &RunReport) {
    let c = &r.census;
    println!(
        "{} accounts: {} seeded, {} after propagation, {} uncategorized, {} labeled by the model",
        c.accounts, c.seed_labeled, c.labeled_after_propagation, c.uncategorized_after_propagation, c.model_labeled
    );
    println!(
        "cross-validated accuracy {:.4}, macro F1 {:.4}",
        r.cv.accuracy, r.cv.macro_f1
    );
    println!(
        "holdout accuracy {:.4} on {} accounts",
        r.holdout.report.accuracy, r.holdout.test_size
    );
    if let Some(t) = &r.truth {
        println!("ground-truth accuracy {:.4}", t.cv.accuracy);
    }
    for a in &r.agreements {
        println!(
            "agreement with {}: {:.4} ({}/{})",
            a.reference, a.agreement, a.matched, a.reference_size
        );
    }
    for x in &r.rechecks {
        println!(
            "recheck {}: {:.4} ({}/{})",
            x.name, x.report.accuracy, x.report.correct, x.report.covered
        );
    }
}

fn compare(g: &Global, names: &[String]) -> Result<()> {
    let pipeline = pipeline(g, |cfg| {
        if !names.is_empty() {
            cfg.compare.classifiers = names
                .iter()
                .map(|n| n.parse::<Contender>().map_err(|e| PipelineError::Config(e.to_string())))
                .collect::<Result<_, _>>()?;
        }
        Ok(())
    })?;
    let report = pipeline.run_stage(Stage::Compare)?;
    if g.json {
        return print_stage(&report, pipeline.output_dir(), true);
    }
    let rows: Vec<ComparisonRow> = serde_json::from_slice(&fs::read(pipeline.artifact(artifacts::COMPARISON))?)?;
    print!("{}", comparison_markdown(&rows));
    Ok(())
}

fn synth(g: &Global, args: &SynthArgs) -> Result<()> {
    let mut cfg = match &g.config {
        Some(p) => GeneratorConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => GeneratorConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.accounts {
        cfg.accounts_per_category = [n; 4];
    }
    if let Some(x) = args.noise {
        cfg.noise = x;
    }
    if let Some(h) = args.hashed_fraction {
        cfg.hashed_fraction = [h; 4];
    }
    cfg.validate()?;
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
    let corpus = generate(&cfg)?;
    let files = corpus.write_to_dir(&dir)?;
    fs::write(dir.join("generator.toml"), cfg.to_toml())?;

    fs::write(
        dir.join("pipeline.toml"),
        PipelineConfig::for_synthetic(cfg.seed).to_toml(),
    )?;

    println!(
        "{} accounts, {} tweets, {} hashed",
        corpus.accounts.len(),
        corpus.tweets.len(),
        corpus.hashed_accounts().count()
    );
    for p in [&files.archive, &files.labels, &files.truth] {
        println!("  wrote {}", p.display());
    }
    println!("  wrote {}", dir.join("pipeline.toml").display());

    if !args.no_verify {
        let (dataset, _) = parse_archive(&files.archive, IngestOptions::new(Schema::Jsonl))?;
        let report = verify_generation(&dataset, &corpus.truth, &cfg)?;
        fs::write(
            dir.join("verification.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        println!(
            "self-check: {} of {} statistics outside 3 standard errors",
            report.checks.iter().filter(|c| c.flagged).count(),
            report.checks.len()
        );
        for f in &report.flags {
            println!("  flag: {f}");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_follow_subcommands() {
        let cli = Cli::try_parse_from(["footprint", "compare", "--classifier", "knn", "--seed", "9", "-vv"]).unwrap();
        assert_eq!(cli.global.seed, Some(9));
        assert_eq!(cli.global.verbose, 2);
        assert!(matches!(cli.command, Command::Compare { ref classifiers } if classifiers == &["knn"]));
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&PipelineError::Config("x".into()).into()), 1);
        assert_eq!(exit_code(&PipelineError::Locked { dir: "d".into() }.into()), 2);
        assert_eq!(exit_code(&SynthError::InvalidConfig("x".into()).into()), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), 3);
    }
}
