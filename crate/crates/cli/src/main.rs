//! `climrl`: train, tune, evaluate, rank and export.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use climrl::algos::{rollout_episode, train as train_agent, Control};
use climrl::config::{ConfigFile, RunConfig, RunFlags};
use climrl::env::rce::profile_comparison_csv;
use climrl::env::{EnvKind, EnvSpec, ObservedProfile};
use climrl::eval::curves::curves_csv;
use climrl::eval::ranking::{format_frequency_csv, format_frequency_text, format_scores_csv, format_top_lists_csv, format_top_lists_text};
use climrl::eval::suite::{default_config, env_spec, experiment_config};
use climrl::eval::{frequency_table, rank_algorithms, read_records, run_experiment_suite, threshold_for, ExperimentId, SuiteSettings, TopList};
use climrl::tuner::{run_study, EnvTrialRunner, StudySettings, DEFAULT_TRIALS};

#[derive(Parser)]
#[command(name = "climrl", version, about = "Continuous-action RL on idealised climate environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train algorithms over seeds and write one record file per run.
    Train(RunArgs),
    /// Random-search tuning with median pruning; writes a config fragment.
    Tune(TuneArgs),
    /// Score every (experiment, algorithm) found in a record directory.
    Evaluate(ReportArgs),
    /// Top-k lists and frequency tables from records or supplied lists.
    Rank(RankArgs),
    /// Export plot data.
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Experiment code, e.g. v0-homo-64L-60k.
    #[arg(long)]
    experiment: Option<String>,
    /// Comma list of algorithm tags, or `all`.
    #[arg(long)]
    algo: Option<String>,
    /// `N`, `A..B` or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// Overrides the experiment's step budget.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Configuration file (run settings, env overrides, algorithm sections).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    /// Disable median pruning.
    #[arg(long)]
    no_prune: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory searched recursively for record files.
    #[arg(long, default_value = "runs")]
    records: PathBuf,
    /// Only this experiment.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Also write the tables into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    report: ReportArgs,
    /// Rank supplied `experiment_id,ALG,ALG,ALG` lines instead of records.
    #[arg(long)]
    top_lists: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
}

#[derive(Subcommand)]
enum ExportCommand {
    /// Train on RCE, run the greedy policy for one episode and write its final profile.
    Profile(RunArgs),
    /// Mean ± 95% confidence curves bucketed by global step.
    Curves {
        #[arg(long, default_value = "runs")]
        records: PathBuf,
        #[arg(long, default_value_t = 2_000)]
        bucket: u64,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

/// Usage errors are bad identifiers, flags and configuration; everything else is a runtime failure.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<climrl::Error>() {
        Some(
            climrl::Error::UnknownExperiment(_)
            | climrl::Error::UnknownAlgorithm(_)
            | climrl::Error::Parse { .. }
            | climrl::Error::InvalidArgument(_)
            | climrl::Error::MissingTunedConfig { .. },
        ) => 1,
        _ => 2,
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train(&args),
        Command::Tune(args) => tune(&args),
        Command::Evaluate(args) => evaluate(&args),
        Command::Rank(args) => rank(&args),
        Command::Export(ExportCommand::Profile(args)) => export_profile(&args),
        Command::Export(ExportCommand::Curves { records, bucket, out }) => {
            let text = curves_csv(&read_records(&records)?, bucket)?;
            emit(out.as_deref(), &text)
        }
    }
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let file = args.config.as_deref().map(ConfigFile::load).transpose()?;
    let flags = RunFlags {
        experiment: args.experiment.clone(),
        algorithms: args.algo.clone(),
        seeds: args.seeds.clone(),
        steps: args.steps,
        workers: args.workers,
        out: args.out.clone(),
    };
    Ok(RunConfig::resolve(&flags, file.as_ref())?)
}

fn settings(rc: &RunConfig) -> SuiteSettings {
    SuiteSettings { steps: rc.steps, workers: rc.workers, env_overrides: rc.env_overrides.clone(), tuned: rc.tuned.clone() }
}

fn train(args: &RunArgs) -> Result<()> {
    let rc = resolve(args)?;
    let dir = rc.out.join(rc.experiment.to_string());
    let records = run_experiment_suite(&rc.experiment, &rc.algorithms, &rc.seeds, &settings(&rc), |r| {
        let path = r.write_to_dir(&dir)?;
        let last = r.episodes.last().map_or(f64::NAN, |e| e.episodic_return);
        eprintln!("{} seed {}: {} episodes, final return {last:.4}, {} -> {}", r.algorithm, r.seed, r.episodes.len(), r.status, path.display());
        Ok(())
    })?;
    println!("wrote {} records to {}", records.len(), dir.display());
    Ok(())
}

fn tune(args: &TuneArgs) -> Result<()> {
    let rc = resolve(&args.run)?;
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let spec = env_spec(rc.experiment.env, &rc.env_overrides)?;
    let budget = rc.steps.unwrap_or_else(|| rc.experiment.budget(None));
    let fragment_path = rc.out.join(format!("tuned-{}.cfg", rc.experiment));
    let mut fragment = if fragment_path.exists() { ConfigFile::load(&fragment_path)? } else { ConfigFile::default() };
    for &alg in &rc.algorithms {
        let mut base = default_config(alg, rc.experiment.env);
        base.total_timesteps = budget;
        let study_settings = StudySettings { n_trials: args.trials, workers: rc.workers, prune: !args.no_prune, ..Default::default() };
        let study = run_study(&base, &study_settings, &EnvTrialRunner { env: spec.clone() })
            .with_context(|| format!("tuning {alg} on {}", rc.experiment))?;
        for t in &study.trials {
            let score = t.score.map_or_else(|| "-".to_string(), |s| format!("{s:.4}"));
            eprintln!("{alg} trial {:>3}: {:<26} score {score:>12}  steps {}", t.id, t.status.to_string(), t.steps);
        }
        let best = study.best_trial();
        println!("{alg}: best trial {} with score {:.4} ({} env steps in total)", best.id, best.score.unwrap_or(f64::NAN), study.total_steps());
        study.write_fragment(&mut fragment);
    }
    fragment.save(&fragment_path)?;
    println!("wrote {}", fragment_path.display());
    Ok(())
}

fn load_filtered(args: &ReportArgs) -> Result<Vec<climrl::eval::RunRecord>> {
    let mut records = read_records(&args.records)?;
    if let Some(exp) = &args.experiment {
        let exp: ExperimentId = exp.parse()?;
        records.retain(|r| r.experiment_id == exp.to_string());
        if records.is_empty() {
            bail!(climrl::Error::Empty(format!("no records for {exp} under {}", args.records.display())));
        }
    }
    Ok(records)
}

fn evaluate(args: &ReportArgs) -> Result<()> {
    let records = load_filtered(args)?;
    let rankings = rank_algorithms(&records, threshold_for)?;
    let csv = format_scores_csv(&rankings);
    if let Some(dir) = &args.out {
        write_file(&dir.join("scores.csv"), &csv)?;
    }
    match args.format {
        Format::Csv => print!("{csv}"),
        Format::Text => {
            for r in &rankings {
                println!("{}", r.experiment_id);
                println!("  {:<4}{:<11}{:>7}{:>16}{:>18}{:>14}", "#", "Algorithm", "seeds", "median N", "mean var", "mean delta");
                for (i, s) in r.scores.iter().enumerate() {
                    let n = s.median_n_to_threshold.map_or_else(|| "never".into(), |v| format!("{v:.0}"));
                    let v = s.mean_var_after_threshold.map_or_else(|| "-".into(), |v| format!("{v:.4e}"));
                    println!(
                        "  {:<4}{:<11}{:>4}/{:<2}{:>16}{:>18}{:>14.4}",
                        i + 1,
                        s.algorithm.to_string(),
                        s.reached,
                        s.seeds,
                        n,
                        v,
                        s.mean_delta_from_final
                    );
                }
            }
        }
    }
    Ok(())
}

/// Environment family of an experiment code, for separate frequency tables.
fn family(experiment_id: &str) -> &'static str {
    match experiment_id.parse::<ExperimentId>() {
        Ok(e) if e.env == EnvKind::Rce => "RadiativeConvectiveModelEnv",
        Ok(_) => "SimpleClimateBiasCorrectionEnv",
        Err(_) if experiment_id.starts_with("rce") => "RadiativeConvectiveModelEnv",
        Err(_) => "other",
    }
}

fn rank(args: &RankArgs) -> Result<()> {
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let lists: Vec<TopList> = match &args.top_lists {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            text.lines()
                .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
                .map(TopList::parse_line)
                .collect::<climrl::Result<_>>()?
        }
        None => {
            let records = load_filtered(&args.report)?;
            rank_algorithms(&records, threshold_for)?.iter().map(|r| r.top(args.k)).collect()
        }
    };
    if lists.is_empty() {
        bail!(climrl::Error::Empty("no top lists to rank".into()));
    }
    // Experiments with fewer than k algorithms cap the list length.
    let k = lists.iter().map(|l| l.algorithms.len()).min().unwrap_or(0).min(args.k);
    let mut by_family: BTreeMap<&str, Vec<TopList>> = BTreeMap::new();
    for l in &lists {
        by_family.entry(family(&l.experiment_id)).or_default().push(l.clone());
    }
    let mut text = String::new();
    let mut csv = format_top_lists_csv(&lists);
    text.push_str(&format_top_lists_text(&lists));
    for (fam, group) in &by_family {
        for k in [k, 1] {
            let rows = frequency_table(group, k)?;
            text.push('\n');
            text.push_str(&format_frequency_text(&format!("{fam}: frequency within top-{k}"), &rows));
            csv.push_str(&format!("\n# {fam} top-{k}\n"));
            csv.push_str(&format_frequency_csv(&rows));
            if let Some(dir) = &args.report.out {
                write_file(&dir.join(format!("frequency-top{k}-{fam}.csv")), &format_frequency_csv(&rows))?;
            }
            if k == 1 {
                break;
            }
        }
    }
    if let Some(dir) = &args.report.out {
        write_file(&dir.join(format!("top{}.csv", args.k)), &format_top_lists_csv(&lists))?;
    }
    match args.report.format {
        Format::Text => print!("{text}"),
        Format::Csv => print!("{csv}"),
    }
    Ok(())
}

fn export_profile(args: &RunArgs) -> Result<()> {
    let rc = resolve(args)?;
    if rc.experiment.env != EnvKind::Rce {
        return Err(usage(format!("profile export needs an RCE experiment, got {}", rc.experiment)));
    }
    let [alg] = rc.algorithms[..] else { return Err(usage("profile export takes exactly one --algo")) };
    let seed = rc.seeds[0];
    let cfg = experiment_config(&rc.experiment, alg, rc.tuned.get(&alg), rc.steps)?;
    let spec: EnvSpec = env_spec(rc.experiment.env, &rc.env_overrides)?;
    let mut env = spec.build()?;
    let outcome = train_agent(env.as_mut(), &cfg, seed, |_| Control::Continue)?;
    let mut agent = outcome.agent;
    let trace = rollout_episode(&mut agent, env.as_mut(), Some(seed), false)?;
    let simulated = trace.final_info.get("temperature_K").ok_or_else(|| anyhow!("environment reported no temperatures"))?;
    let observed = match &spec.observed {
        Some(p) => p.clone(),
        None => ObservedProfile::standard_atmosphere(&spec.rce.pressure_levels)?,
    };
    let csv = profile_comparison_csv(&observed, simulated)?;
    let path = rc.out.join(format!("profile-{}-{}-seed{seed}.csv", rc.experiment, alg.tag()));
    write_file(&path, &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| climrl::Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    fs::write(path, text).map_err(|e| climrl::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
