use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chatter_atlas::ingest::{dataset_summary, engagement_histogram, write_jsonl, LogFormat};
use chatter_atlas::refine::AutoMergeParams;
use chatter_atlas::report::ReportFormat;
use chatter_atlas::synth::{planted_corpus, ExtraUser, PlantedCorpusSpec};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{EmbedderKind, PipelineConfig};
use crate::error::{CliError, EXIT_NOT_CONVERGED};
use crate::pipeline::{self, to_json, write_text, ClusteringFile};

#[derive(Debug, Parser)]
#[command(name = "chatter-atlas", version, about = "Cluster stream chatters by what they write")]
pub struct Cli {
    /// TOML config; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

// parsed once per process
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset summary and engagement histogram.
    Stats(StatsArgs),
    /// Per-chatter documents for chatters above the activity threshold.
    Profiles(ProfilesArgs),
    /// Embed a profiles file.
    Embed(EmbedCmdArgs),
    /// Affinity propagation over an embeddings file.
    Cluster(ClusterCmdArgs),
    /// Apply a merge spec and/or automatic merging to a clustering.
    Merge(MergeCmdArgs),
    /// Render a report for a clustering.
    Report(ReportCmdArgs),
    /// The whole pipeline, from chat log to report.
    Run(RunArgs),
    /// Write a seeded synthetic chat log with planted chatter archetypes.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default)]
pub struct InputArgs {
    /// Chat log (JSONL or CSV with ts,user,text).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long = "input-format")]
    pub input_format: Option<LogFormat>,
}

impl InputArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.input_path, self.input.clone().map(Some));
        set(&mut cfg.input_format, self.input_format.map(Some));
    }
}

#[derive(Debug, Args, Default)]
pub struct FilterArgs {
    /// Chatters with fewer messages are left out.
    #[arg(long)]
    pub min_messages: Option<usize>,
    /// Comma-separated chatters to leave out (bots, moderators).
    #[arg(long, value_delimiter = ',')]
    pub exclude_users: Option<Vec<String>>,
}

impl FilterArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.min_messages, self.min_messages);
        set(&mut cfg.exclude_users, self.exclude_users.clone());
    }
}

#[derive(Debug, Args, Default)]
pub struct EmbedArgs {
    #[arg(long)]
    pub embedder: Option<EmbedderKind>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub ngram: Option<usize>,
    /// Embedding service URL; the key is read from CHATTER_ATLAS_API_KEY.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub retries: Option<u32>,
    #[arg(long)]
    pub max_chars: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

impl EmbedArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.embedder, self.embedder);
        set(&mut cfg.local.dim, self.dim);
        set(&mut cfg.local.ngram, self.ngram);
        set(&mut cfg.remote.endpoint, self.endpoint.clone());
        set(&mut cfg.remote.model_id, self.model.clone());
        set(&mut cfg.remote.task, self.task.clone());
        set(&mut cfg.remote.batch_size, self.batch_size);
        set(&mut cfg.remote.concurrency, self.concurrency);
        set(&mut cfg.remote.retries, self.retries);
        set(&mut cfg.remote.max_chars, self.max_chars);
        set(&mut cfg.cache_dir, self.cache_dir.clone().map(Some));
    }
}

#[derive(Debug, Args, Default)]
pub struct ApArgs {
    /// Shared preference; defaults to the median similarity.
    #[arg(long, allow_hyphen_values = true)]
    pub preference: Option<f64>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub convergence_iter: Option<usize>,
    /// Keep single-member clusters.
    #[arg(long)]
    pub no_prune: bool,
}

impl ApArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.preference, self.preference.map(Some));
        set(&mut cfg.ap.damping, self.damping);
        set(&mut cfg.ap.max_iter, self.max_iter);
        set(&mut cfg.ap.convergence_iter, self.convergence_iter);
        if self.no_prune {
            cfg.prune_singletons = false;
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct MergeArgs {
    /// JSON file `{"groups": [{"name": ..., "members": [cluster ids]}]}`.
    #[arg(long)]
    pub merge_spec: Option<PathBuf>,
    /// Merge clusters whose centroids cluster together.
    #[arg(long)]
    pub auto_merge: bool,
    #[arg(long)]
    pub auto_merge_depth: Option<usize>,
}

impl MergeArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.merge_spec_path, self.merge_spec.clone().map(Some));
        if self.auto_merge {
            cfg.auto_merge = true;
        }
        set(&mut cfg.auto_merge_depth, self.auto_merge_depth);
    }
}

#[derive(Debug, Args, Default)]
pub struct ReportArgs {
    #[arg(long)]
    pub output_format: Option<ReportFormat>,
    /// Engagement buckets, e.g. `1-10,11-20,21+`.
    #[arg(long)]
    pub buckets: Option<String>,
    #[arg(long)]
    pub k_terms: Option<usize>,
    #[arg(long)]
    pub k_samples: Option<usize>,
}

impl ReportArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.output_format, self.output_format);
        set(&mut cfg.buckets, self.buckets.clone());
        set(&mut cfg.k_terms, self.k_terms);
        set(&mut cfg.k_samples, self.k_samples);
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub buckets: Option<String>,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ProfilesArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Profiles JSONL; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedCmdArgs {
    #[arg(long)]
    pub profiles: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterCmdArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[command(flatten)]
    pub ap: ApArgs,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct MergeCmdArgs {
    #[arg(long)]
    pub clustering: PathBuf,
    /// Needed for --auto-merge.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub merge: MergeArgs,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub convergence_iter: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportCmdArgs {
    /// The chat log the clustering came from (for the dataset tables).
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub clustering: PathBuf,
    #[arg(long)]
    pub profiles: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[command(flatten)]
    pub report: ReportArgs,
    /// Report file; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub ap: ApArgs,
    #[command(flatten)]
    pub merge: MergeArgs,
    #[command(flatten)]
    pub report: ReportArgs,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl RunArgs {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        self.input.apply(cfg);
        self.filter.apply(cfg);
        self.embed.apply(cfg);
        self.ap.apply(cfg);
        self.merge.apply(cfg);
        self.report.apply(cfg);
        set(&mut cfg.output_path, self.output.clone());
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub archetypes: usize,
    #[arg(long, default_value_t = 15)]
    pub users_per_archetype: usize,
    #[arg(long, default_value_t = 25)]
    pub messages_per_user: usize,
    #[arg(long, default_value_t = 5)]
    pub low_activity_users: usize,
    /// Extra chatter as NAME:ARCHETYPE:MESSAGES; repeatable.
    #[arg(long = "extra", value_parser = parse_extra)]
    pub extra: Vec<ExtraUser>,
    /// Chat log JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Planted archetype of every chatter, as JSON.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

fn parse_extra(s: &str) -> Result<ExtraUser, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [name, archetype, messages] = parts[..] else {
        return Err(format!("expected NAME:ARCHETYPE:MESSAGES, got `{s}`"));
    };
    Ok(ExtraUser {
        name: name.to_string(),
        archetype: archetype.parse().map_err(|e| format!("archetype: {e}"))?,
        messages: messages.parse().map_err(|e| format!("messages: {e}"))?,
    })
}

fn print_or_write(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Runs a parsed command line and returns the process exit status.
pub fn execute(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Stats(args) => stats(&mut cfg, args),
        Command::Profiles(args) => profiles(&mut cfg, args),
        Command::Embed(args) => embed(&mut cfg, args),
        Command::Cluster(args) => cluster(&mut cfg, args),
        Command::Merge(args) => merge(&mut cfg, args),
        Command::Report(args) => report(&mut cfg, args),
        Command::Run(args) => {
            args.apply(&mut cfg);
            let summary = pipeline::run_pipeline(&cfg)?;
            println!("{}", summary.line());
            Ok(summary.exit_code())
        }
        Command::Synth(args) => synth(args),
    }
}

#[derive(Serialize)]
struct StatsOutput {
    summary: chatter_atlas::ingest::DatasetSummary,
    histogram: chatter_atlas::ingest::EngagementHistogram,
    malformed: usize,
}

fn stats(cfg: &mut PipelineConfig, args: StatsArgs) -> Result<i32, CliError> {
    args.input.apply(cfg);
    set(&mut cfg.buckets, args.buckets);
    let log = pipeline::load_log(cfg.input_path()?, cfg.resolved_input_format())?;
    let summary = dataset_summary(&log.messages)?;
    let histogram = engagement_histogram(&log.messages, &cfg.bucket_spec()?);
    if args.json {
        print!("{}", to_json(&StatsOutput { summary, histogram, malformed: log.malformed }));
    } else {
        println!(
            "{} messages from {} chatters over {} ({} malformed records skipped)",
            summary.messages,
            summary.chatters,
            summary.length_label(),
            log.malformed
        );
        for b in &histogram.buckets {
            println!("{:>10}  {}", b.label, b.chatters);
        }
    }
    Ok(0)
}

fn profiles(cfg: &mut PipelineConfig, args: ProfilesArgs) -> Result<i32, CliError> {
    args.input.apply(cfg);
    args.filter.apply(cfg);
    let log = pipeline::load_log(cfg.input_path()?, cfg.resolved_input_format())?;
    let sel = pipeline::select_profiles(&log.messages, cfg.min_messages, &cfg.exclude_users)?;
    log::info!("{} chatters retained, {} below threshold", sel.retained.len(), sel.below_threshold.len());
    match &args.output {
        Some(path) => pipeline::write_profiles(path, &sel.retained)?,
        None => {
            let mut buf = Vec::new();
            chatter_atlas::profile::write_profiles(&sel.retained, &mut buf).map_err(|e| CliError::Other(e.to_string()))?;
            print!("{}", String::from_utf8_lossy(&buf));
        }
    }
    Ok(0)
}

fn embed(cfg: &mut PipelineConfig, args: EmbedCmdArgs) -> Result<i32, CliError> {
    args.embed.apply(cfg);
    let profiles = pipeline::read_profiles(&args.profiles)?;
    let embedded = pipeline::embed_profiles(cfg, &profiles, cfg.cache_dir.as_deref())?;
    let users: Vec<String> = profiles.iter().map(|p| p.user_display.clone()).collect();
    pipeline::write_embeddings(&args.output, &users, &embedded.vectors)?;
    Ok(0)
}

fn cluster(cfg: &mut PipelineConfig, args: ClusterCmdArgs) -> Result<i32, CliError> {
    args.ap.apply(cfg);
    cfg.ap.validate()?;
    let (users, vectors) = pipeline::read_embeddings(&args.embeddings)?;
    if users.is_empty() {
        return Err(CliError::Input(format!("{} holds no embeddings", args.embeddings.display())));
    }
    let out = pipeline::cluster_vectors(&vectors, cfg.preference, &cfg.ap, cfg.prune_singletons)?;
    let converged = out.clustering.converged;
    write_text(&args.output, &to_json(&ClusteringFile { users, clustering: out.clustering }))?;
    Ok(if converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn merge(cfg: &mut PipelineConfig, args: MergeCmdArgs) -> Result<i32, CliError> {
    args.merge.apply(cfg);
    set(&mut cfg.ap.damping, args.damping);
    set(&mut cfg.ap.max_iter, args.max_iter);
    set(&mut cfg.ap.convergence_iter, args.convergence_iter);
    let file = pipeline::read_clustering(&args.clustering)?;
    let spec = cfg.merge_spec_path.as_deref().map(pipeline::load_merge_spec).transpose()?;
    let vectors = match (&args.embeddings, cfg.auto_merge) {
        (Some(path), _) => pipeline::read_embeddings(path)?.1,
        (None, true) => return Err(CliError::Input("--auto-merge needs --embeddings".into())),
        (None, false) => Vec::new(),
    };
    let auto = cfg.auto_merge.then_some(AutoMergeParams {
        max_depth: cfg.auto_merge_depth,
        ap: cfg.ap,
    });
    let refined = pipeline::refine(&file.clustering, &vectors, spec.as_ref(), auto.as_ref())?;
    for w in &refined.warnings {
        log::warn!("{w}");
    }
    write_text(
        &args.output,
        &to_json(&ClusteringFile {
            users: file.users,
            clustering: refined.clustering,
        }),
    )?;
    Ok(0)
}

fn report(cfg: &mut PipelineConfig, args: ReportCmdArgs) -> Result<i32, CliError> {
    args.input.apply(cfg);
    args.report.apply(cfg);
    let log = pipeline::load_log(cfg.input_path()?, cfg.resolved_input_format())?;
    let file = pipeline::read_clustering(&args.clustering)?;
    let profiles = pipeline::read_profiles(&args.profiles)?;
    let (_, vectors) = pipeline::read_embeddings(&args.embeddings)?;
    let text = pipeline::report_text(cfg, &log.messages, &file.clustering, &profiles, &vectors)?;
    print_or_write(args.output.as_deref(), &text)?;
    Ok(0)
}

fn synth(args: SynthArgs) -> Result<i32, CliError> {
    if !(1..=8).contains(&args.archetypes) {
        return Err(CliError::Input("archetypes must be between 1 and 8".into()));
    }
    let spec = PlantedCorpusSpec {
        seed: args.seed,
        archetypes: args.archetypes,
        users_per_archetype: args.users_per_archetype,
        messages_per_user: args.messages_per_user,
        low_activity_users: args.low_activity_users,
        extra_users: args.extra,
        ..PlantedCorpusSpec::default()
    };
    let corpus = planted_corpus(&spec);
    let mut buf = Vec::new();
    write_jsonl(&corpus.messages, &mut buf).map_err(|e| CliError::Other(e.to_string()))?;
    write_text(&args.output, &String::from_utf8(buf).expect("JSON is UTF-8"))?;
    if let Some(path) = &args.labels {
        let labels: BTreeMap<&str, usize> = corpus.labels.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        write_text(path, &to_json(&labels))?;
    }
    Ok(0)
}
